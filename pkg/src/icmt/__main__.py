"""``python -m icmt``."""
import sys

from .cli import main

sys.exit(main())
