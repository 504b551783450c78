from setuptools import Extension, setup

import numpy as np
from Cython.Build import cythonize

# -ffast-math lets gcc vectorize the expf/tanhf loops through libmvec;
# kernels never rely on NaN/Inf propagation, so the relaxed semantics are safe.
ext = Extension(
    "kbgen.kernels._ops",
    ["src/kbgen/kernels/_ops.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3", "-ffast-math", "-funroll-loops"],
    extra_link_args=["-lmvec", "-lm"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
