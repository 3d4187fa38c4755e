from teich_recur.main import main

main()
