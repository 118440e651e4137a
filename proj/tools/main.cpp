#include "sceneqa/cli.hpp"

int main(int argc, char** argv) { return sceneqa::cli::dispatch(argc, argv); }
