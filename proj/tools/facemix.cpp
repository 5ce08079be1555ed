#include "facemix/cli.hpp"

int main(int argc, char** argv) { return facemix::cli_dispatch(argc, argv); }
