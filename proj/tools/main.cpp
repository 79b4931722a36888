#include <iostream>

#include "shapeformer/cli.hpp"

int main(int argc, char** argv) {
    return shapeformer::cli::dispatch({argv + 1, argv + argc}, std::cout, std::cerr);
}
