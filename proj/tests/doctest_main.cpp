#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "saltpepper/runtime.hpp"

int main(int argc, char** argv) {
    saltpepper::configure_allocator();
    doctest::Context ctx(argc, argv);
    return ctx.run();
}
