from fedbal.harness.cli import main

main()
