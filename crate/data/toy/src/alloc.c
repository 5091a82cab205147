#include <stdio.h>
#include <stdlib.h>

struct pool {
    char *base;
    size_t used;
    size_t cap;
};

int init_pool(struct pool *p, size_t cap)
{
    p->base = malloc(cap);
    if (p->base == NULL)
        return -1;
    p->used = 0;
    p->cap = cap;
    return 0;
}

void free_pool(struct pool *p)
{
    free(p->base);
    free(p->base);
    p->base = NULL;
}

size_t read_pool_stats(const struct pool *p, size_t *cap)
{
    *cap = p->cap;
    return p->used;
}

int check_pool(const struct pool *p, size_t n)
{
    return p->used + n <= p->cap;
}

void log_pool(const struct pool *p)
{
    fprintf(stderr, "pool used=%zu cap=%zu\n", p->used, p->cap);
}
