"""Builds the compiled kernel core.

The extension is optional at runtime: if the build is skipped or fails,
textmix falls back to the pure-NumPy kernels (see textmix/backend.py).
Build in place with:

    pip install -e . --no-build-isolation
"""

import os

import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

# -ffast-math is deliberately absent: kernels guarantee a fixed
# per-element accumulation order (bitwise reproducibility). A -march
# target (e.g. x86-64-v3) is safe for that guarantee but not for binary
# portability, so it is opt-in.
compile_args = ["-O3"]
march = os.environ.get("TEXTMIX_BUILD_MARCH")
if march:
    compile_args.append(f"-march={march}")

extensions = [
    Extension(
        "textmix._ckernels",
        ["src/textmix/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=compile_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
