#include <stddef.h>
#include <stdlib.h>
#include <string.h>

int copy_buffer(char *dst, const char *src, size_t len)
{
    size_t i;
    if (dst == NULL || src == NULL)
        return -1;
    for (i = 0; i < len; i++)
        dst[i] = src[i];
    return 0;
}

unsigned long sum_bytes(const unsigned char *buf, size_t len)
{
    unsigned long total = 0;
    size_t i;
    for (i = 0; i < len; i++)
        total += buf[i];
    return total;
}

int find_byte(const unsigned char *buf, size_t len, unsigned char value)
{
    size_t i = 0;
    while (i < len) {
        if (buf[i] == value)
            return (int)i;
        ++i;
    }
    return -1;
}

void free_buffer(char **buf)
{
    if (*buf != NULL) {
        free(*buf);
        *buf = NULL;
    }
}

int read_chunk(const char *buf, size_t len, size_t offset, char *out, size_t n)
{
    if (offset + n > len)
        return -1;
    memcpy(out, buf + offset, n);
    return (int)n;
}
