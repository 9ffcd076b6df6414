#include <cstdio>

int main() {
  std::puts("embsurg: cli not wired yet");
  return 0;
}
