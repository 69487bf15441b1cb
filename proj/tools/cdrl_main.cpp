#include <cstdio>

int main() {
  std::puts("cdrl: subcommands not wired yet");
  return 2;
}
