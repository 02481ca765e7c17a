#include <iostream>

int main() {
  std::cout << "risloc: CLI pending\n";
  return 0;
}
