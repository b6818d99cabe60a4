import sys

from scribblevs.cli import main

sys.exit(main())
