from setuptools import setup, find_packages

setup(
    name='pdacascade',
    version="0.1.0",
    packages=find_packages(exclude=["tests", "example"]),
    author="paul.hermann",

    # Short description
    description="Cascaded slice cropping, pancreas segmentation and therapy response classification for CT volumes.",

    # The README is the long description
    long_description=open('README.md').read(),

    python_requires=">=3.10",
    install_requires=[
        "numpy",
        "scipy",
        "torch",
        "monai",
        "nibabel",
        "pandas",
        "scikit-learn",
        "matplotlib",
        "pyyaml",
    ],
    entry_points={"console_scripts": ["pdacascade=pdacascade.cli:main"]},
)
