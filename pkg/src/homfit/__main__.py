import sys

from homfit.cli import main

sys.exit(main())
