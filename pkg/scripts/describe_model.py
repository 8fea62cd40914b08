import sys
from pathlib import Path
repo_root = Path(__file__).resolve().parents[1]
if str(repo_root) not in sys.path:
    sys.path.insert(0, str(repo_root))

import numpy as np

from src.serialize import read_model_header


def describe(path):
    header = read_model_header(path)
    print('Model file', path)
    print('kind:', header['kind'])
    for key, value in sorted(header['spec'].items()):
        print(f'  {key}: {value}')
    total = 0
    for t in header['tensors']:
        n = int(np.prod(t['shape']))
        total += n
        print(f"{t['name']:<16} {str(tuple(t['shape'])):<20} {n}")
    print('parameters:', total)


if __name__ == '__main__':
    if len(sys.argv) < 2:
        print('usage: describe_model.py MODEL.afen [...]')
        sys.exit(2)
    for p in sys.argv[1:]:
        describe(p)
