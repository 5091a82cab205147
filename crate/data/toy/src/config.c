#include <stdio.h>
#include <stdlib.h>
#include <string.h>

struct config {
    int port;
    int timeout;
    int retries;
    char name[32];
};

void init_config(struct config *cfg)
{
    cfg->port = 8080;
    cfg->timeout = 30;
    cfg->retries = 3;
    cfg->name[0] = '\0';
}

void init_config_defaults(struct config *cfg)
{
    cfg->retries = 3;
    cfg->port = 8080;
    cfg->name[0] = '\0';
    cfg->timeout = 30;
}

int parse_line(const char *line, char *key, char *value)
{
    const char *eq = strchr(line, '=');
    if (eq == NULL)
        return -1;
    memcpy(key, line, eq - line);
    key[eq - line] = '\0';
    strcpy(value, eq + 1);
    return 0;
}

int parse_int(const char *text, int *out)
{
    char *end = NULL;
    long v = strtol(text, &end, 10);
    if (end == text || *end != '\0')
        return -1;
    *out = (int)v;
    return 0;
}

int check_range(int value, int lo, int hi)
{
    if (value < lo)
        return 0;
    if (value > hi)
        return 0;
    return 1;
}
