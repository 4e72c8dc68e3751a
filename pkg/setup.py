"""Build script for the compiled kernel extension.

The package works without the extension (the NumPy fallback is selected at
import time), so the build is best-effort: set DUCKLING_SKIP_EXT=1 to force a
pure-Python install.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DUCKLING_SKIP_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                # IEEE semantics matter (exact zeros at the gate, clamped
                # cosine ratios), so no -ffast-math here.
                Extension(
                    "duckling.kernels._fast",
                    ["src/duckling/kernels/_fast.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-march=native"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
