#include <stdlib.h>

struct node {
    int value;
    struct node *next;
};

struct node *init_list(int value)
{
    struct node *head = malloc(sizeof(*head));
    head->value = value;
    head->next = NULL;
    return head;
}

void free_list(struct node *head)
{
    struct node *next;
    while (head != NULL) {
        next = head->next;
        free(head);
        head = next;
    }
}

struct node *find_node(struct node *head, int value)
{
    for (; head != NULL; head = head->next) {
        if (head->value == value)
            return head;
    }
    return NULL;
}

void swap_nodes(struct node *a, struct node *b)
{
    int tmp = a->value;
    a->value = b->value;
    b->value = tmp;
}

long sum_list(const struct node *head)
{
    long total = 0;
    while (head) {
        total += head->value;
        head = head->next;
    }
    return total;
}
