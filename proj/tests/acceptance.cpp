#include <cstdio>
int main(){ printf("placeholder acceptance\n"); return 0; }
