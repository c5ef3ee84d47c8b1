import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("graybox._ckernels", ["src/graybox/_ckernels.pyx"],
                   include_dirs=[np.get_include()],
                   extra_compile_args=["-O3", "-fcx-limited-range"]),
         Extension("graybox._cgru", ["src/graybox/_cgru.pyx"],
                   include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
