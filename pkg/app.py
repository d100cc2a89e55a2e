"""
Debris classifier command line.

    python app.py prepare --data corpus --out corpus/manifest.tsv --seed 7
    python app.py train --manifest corpus/manifest.tsv --out model.bin
    python app.py eval --model model.bin --manifest corpus/manifest.tsv
    python app.py predict --model model.bin photo.jpg
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
