import sys

from ibcvp_lab.cli.run_scenario import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
