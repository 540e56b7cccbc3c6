#include <sgne/cli.hpp>

int main(int argc, char** argv) { return sgne::cli_main(argc, argv); }
