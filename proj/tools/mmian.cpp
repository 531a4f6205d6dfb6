#include "mmian/cli.hpp"

int main(int argc, char** argv) { return mmian::cli::dispatch(argc, argv); }
