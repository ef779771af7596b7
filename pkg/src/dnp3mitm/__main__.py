import sys

from dnp3mitm.cli import main

sys.exit(main())
