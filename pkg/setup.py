from setuptools import setup, find_packages

setup(
    name="sonarscale",
    version="0.1.0",
    packages=find_packages(exclude=["backend.tests"]),
    install_requires=[
        # Numerical core
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "scikit-learn>=1.2.0",
        "pandas>=1.5.0",
        "matplotlib>=3.7.0",

        # Configuration, pipeline graph and projection service
        "pydantic>=2.0.0",
        "python-dotenv>=1.0.0",
        "tomli>=2.0.0; python_version < '3.11'",
        "langgraph>=0.0.10",
        "fastapi>=0.96.0",
        "uvicorn>=0.22.0",
    ],
    author="Your Name",
    author_email="your.email@example.com",
    description="Topographic projection, subspace filtering and beam clustering for multibeam sonar data",
    keywords="sonar, neuroscale, multidimensional scaling, bregman divergence, ica, fastapi, langgraph",
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "sonarscale=backend.app.cli:main",
        ],
    },
    extras_require={
        "test": [
            "pytest>=7.0.0",
            "pytest-cov>=4.0.0",
            "httpx>=0.24.0",
        ],
        "dev": [
            "black>=23.0.0",
            "isort>=5.12.0",
            "flake8>=6.0.0",
            "pre-commit>=3.3.3",
        ],
    },
)
