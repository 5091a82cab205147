#include <stdio.h>
#include <stdlib.h>
#include <string.h>

char *read_file(const char *path, long *size)
{
    FILE *f = fopen(path, "rb");
    char *data;
    fseek(f, 0, SEEK_END);
    *size = ftell(f);
    fseek(f, 0, SEEK_SET);
    data = malloc(*size);
    fread(data, 1, *size, f);
    fclose(f);
    return data;
}

int read_line(FILE *f, char *buf, int cap)
{
    if (fgets(buf, cap, f) == NULL)
        return -1;
    buf[strcspn(buf, "\n")] = '\0';
    return (int)strlen(buf);
}

void log_error(const char *msg)
{
    char line[128];
    sprintf(line, "error: %s", msg);
    fputs(line, stderr);
}

void free_lines(char **lines, int count)
{
    int i;
    for (i = 0; i < count; i++)
        free(lines[i]);
    free(lines);
}

int check_fd(int fd)
{
    if (fd < 0) {
        log_error("bad descriptor");
        return 0;
    }
    return 1;
}
