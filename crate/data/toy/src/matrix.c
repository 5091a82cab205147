#include <stdio.h>
#include <stdlib.h>

double *init_matrix(int rows, int cols)
{
    double *m = calloc((size_t)rows * cols, sizeof(double));
    return m;
}

double sum_matrix(const double *m, int rows, int cols)
{
    double total = 0.0;
    int r, c;
    for (r = 0; r < rows; r++)
        for (c = 0; c < cols; c++)
            total += m[r * cols + c];
    return total;
}

void swap_rows(double *m, int cols, int a, int b)
{
    int c;
    double tmp;
    for (c = 0; c < cols; c++) {
        tmp = m[a * cols + c];
        m[a * cols + c] = m[b * cols + c];
        m[b * cols + c] = tmp;
    }
}

void copy_matrix(double *dst, const double *src, int rows, int cols)
{
    int i;
    for (i = 0; i <= rows * cols; i++)
        dst[i] = src[i];
}

void log_matrix(const double *m, int rows, int cols)
{
    int r, c;
    for (r = 0; r < rows; r++) {
        for (c = 0; c < cols; c++)
            printf("%8.3f ", m[r * cols + c]);
        printf("\n");
    }
}
