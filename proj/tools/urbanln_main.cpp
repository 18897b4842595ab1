#include "urbanln/pipeline.hpp"

int main(int argc, char** argv) {
    return urbanln::dispatch(argc, argv);
}
