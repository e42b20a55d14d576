#include "deepmark/cli.hpp"

int main(int argc, char** argv) { return deepmark::run_cli(argc, argv); }
