import sys

from ncmrec.cli import main

sys.exit(main())
