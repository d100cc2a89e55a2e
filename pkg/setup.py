from setuptools import setup, find_packages

setup(
    name="debris-classifier",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    install_requires=[
        "numpy>=1.24",
        "opencv-python-headless>=4.8",
        "python-dotenv",
        "pydantic>=2.0.0",
        "loguru>=0.7.0",
    ],
    extras_require={
        "dev": ["pytest", "pytest-cov", "black", "isort", "flake8==7.0.0"],
    },
    entry_points={
        "console_scripts": ["debris-classifier=src.cli:main"],
    },
    python_requires=">=3.9",
)
