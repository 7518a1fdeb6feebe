#include "hin/cli.hpp"

int main(int argc, char** argv) { return hin::cli::run(argc, argv); }
