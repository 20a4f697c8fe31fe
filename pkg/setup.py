import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FEWPHOTON_PURE_PYTHON"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("fewphoton._ckernels", ["src/fewphoton/_ckernels.pyx"],
                       include_dirs=[np.get_include()], extra_compile_args=["-O3"])],
            language_level=3,
        )
    except ImportError:
        # no Cython at build time; the numpy kernels are used instead
        ext_modules = []

setup(ext_modules=ext_modules)
