import os

from setuptools import Extension, setup

# The canonical encoder is the hot path (every digest, signature, block hash
# and chain verification goes through it).  Build the Cython speedup when the
# toolchain allows; confledger.canonical falls back to the pure-Python encoder
# when the extension is absent.
ext_modules = []
if os.environ.get("CONFLEDGER_NO_EXTENSION", "") in ("", "0"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "confledger._canonical_fast",
                    ["src/confledger/_canonical_fast.pyx"],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
