from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

ext = Pybind11Extension(
    "tmlecvx._tmlecvx",
    sources=[
        "src/core.cpp",
        "src/io.cpp",
        "src/median_reg.cpp",
        "src/missing_mean.cpp",
        "src/optim.cpp",
        "src/shift_effect.cpp",
        "src/simulate.cpp",
        "bindings/module.cpp",
    ],
    include_dirs=["include", "vendor", "/usr/include/eigen3"],
    libraries=["crypto"],
    define_macros=[("TMLECVX_VERSION", '"0.1.0"')],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
