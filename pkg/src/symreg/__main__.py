import sys

from symreg.cli import main

sys.exit(main())
