"""Build script for the optional compiled band-attention core.

Without Cython or a C compiler the package still installs and falls back to
the numpy kernels at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("VTN_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "vtn._band",
                    ["src/vtn/_band.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
