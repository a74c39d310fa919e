from ielseg.cli import main

main()
