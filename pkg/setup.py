"""Build hook for the compiled sweep kernel.

The package works without the extension (pure-numpy fallback); building it
just makes the serial detector roughly an order of magnitude faster.
"""

import os

import numpy as np
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None and os.path.exists("src/otfsdet/_mfic_cy.pyx"):
    ext_modules = cythonize(
        [
            Extension(
                "otfsdet._mfic_cy",
                ["src/otfsdet/_mfic_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
