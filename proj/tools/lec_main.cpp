#include <lec/cli.hpp>

int main(int argc, char** argv) { return lec::run_cli(argc, argv); }
