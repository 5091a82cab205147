#include <stdint.h>
#include <string.h>
#include <stdio.h>

struct header {
    uint16_t len;
    uint16_t type;
    uint32_t checksum;
};

int read_packet(int fd, unsigned char *buf, int cap)
{
    int n = 0;
    int r;
    while (n < cap) {
        r = recv_bytes(fd, buf + n, cap - n);
        if (r <= 0)
            break;
        n += r;
    }
    return n;
}

int parse_header(const unsigned char *buf, struct header *hdr)
{
    hdr->len = (uint16_t)(buf[0] << 8 | buf[1]);
    hdr->type = (uint16_t)(buf[2] << 8 | buf[3]);
    memcpy(&hdr->checksum, buf + 4, 4);
    return hdr->len;
}

int check_checksum(const unsigned char *buf, int len, uint32_t expected)
{
    uint32_t acc = 0;
    int i;
    for (i = 0; i < len; i++)
        acc = (acc << 1) ^ buf[i];
    return acc == expected;
}

void copy_payload(unsigned char *dst, const unsigned char *pkt, int len)
{
    char local[64];
    memcpy(local, pkt + 8, len);
    memcpy(dst, local, len);
}

void log_packet(const struct header *hdr)
{
    printf("packet len=%d type=%d\n", hdr->len, hdr->type);
}
