import sys

from rasr.cli import main

sys.exit(main())
