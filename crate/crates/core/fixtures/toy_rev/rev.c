#include <stdio.h>
#include <string.h>

static const unsigned char enc[] = {0x0c, 0x06, 0x0b, 0x0d, 0x11, 0x19, 0x1e, 0x59, 0x1a, 0x35, 0x08, 0x13, 0x35, 0x19, 0x1e, 0x59, 0x1a, 0x17};

int check(const char *s) {
    if (strlen(s) != sizeof(enc)) return 0;
    for (size_t i = 0; i < sizeof(enc); i++)
        if ((unsigned char)(s[i] ^ 0x6a) != enc[i]) return 0;
    return 1;
}

int main(int argc, char **argv) {
    char buf[64] = {0};
    if (argc > 1) strncpy(buf, argv[1], sizeof(buf) - 1);
    else if (!fgets(buf, sizeof(buf), stdin)) return 1;
    buf[strcspn(buf, "\n")] = 0;
    puts(check(buf) ? "Correct!" : "Wrong!");
    return 0;
}
