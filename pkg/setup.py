# Builds the optional compiled kernel extension. The package works without it
# (a numpy fallback is selected at import time), so any build failure here is
# non-fatal: we simply ship the pure-Python wheel.
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BPCC_NO_NATIVE") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "bpcc._kernels_c",
                    ["src/bpcc/_kernels_c.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
