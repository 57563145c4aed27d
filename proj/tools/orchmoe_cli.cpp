#include "orchmoe/cli.hpp"

int main(int argc, char** argv) { return orchmoe::run_cli(argc, argv); }
