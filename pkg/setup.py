"""Build script: compiles the optional Cython step kernel.

The package is fully functional without the extension (a numpy fallback with
identical semantics is selected at import); any build failure is therefore
non-fatal.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/annidiff/_stepcore.pyx", "src/annidiff/_cascade.pyx"],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - environment without Cython
    print(f"annidiff: building without compiled core ({exc})")

setup(ext_modules=ext_modules)
