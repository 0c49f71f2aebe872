#include <iostream>

int main() {
    std::cout << "acar: pipeline CLI\n";
    return 0;
}
