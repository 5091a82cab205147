#include <stddef.h>
#include <string.h>

const char *find_char(const char *s, char c)
{
    while (*s != '\0') {
        if (*s == c)
            return s;
        s++;
    }
    return NULL;
}

size_t copy_bounded(char *dst, const char *src, size_t cap)
{
    size_t n = 0;
    if (cap == 0)
        return 0;
    while (n + 1 < cap && src[n] != '\0') {
        dst[n] = src[n];
        n++;
    }
    dst[n] = '\0';
    return n;
}

int check_prefix(const char *s, const char *prefix)
{
    return strncmp(s, prefix, strlen(prefix)) == 0;
}

void swap_chars(char *s, size_t i, size_t j)
{
    char tmp = s[i];
    s[i] = s[j];
    s[j] = tmp;
}

int parse_hex(const char *s, unsigned *out)
{
    unsigned v = 0;
    for (; *s; s++) {
        if (*s >= '0' && *s <= '9')
            v = v * 16 + (unsigned)(*s - '0');
        else if (*s >= 'a' && *s <= 'f')
            v = v * 16 + (unsigned)(*s - 'a' + 10);
        else
            return -1;
    }
    *out = v;
    return 0;
}
