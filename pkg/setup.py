from setuptools import setup, find_packages
from hp_vem import __version__

setup(
    name="hp_vem",
    version=__version__,
    packages=find_packages(exclude=["test", "test.*"]),
    package_data={
        "hp_vem.schemas": ["*.rng"],
    },
    python_requires=">=3.9",
    install_requires=[
        "numpy",
        "scipy>=1.12",
        "lxml",
        "fs",
        "fs-s3fs",
        "argcomplete",
    ],
    extras_require={
        "test": ["deepdiff", "hypothesis"],
    },
    entry_points={
        "console_scripts": [
            "hp-vem=hp_vem.hp_vem:main",
        ],
    },
)
