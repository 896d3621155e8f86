#include "dmseg/cli.hpp"

int main(int argc, char** argv) { return dmseg::cli::run(argc, argv); }
