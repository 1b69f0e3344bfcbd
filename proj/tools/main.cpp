#include "maskfill/cli.hpp"

int main(int argc, char** argv) { return maskfill::cli::run(argc, argv); }
