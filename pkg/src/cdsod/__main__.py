import sys

from cdsod.cli import main

sys.exit(main())
