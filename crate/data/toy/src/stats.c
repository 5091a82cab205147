#include <stdio.h>

double sum_values(const double *v, int n)
{
    double total = 0.0;
    double comp = 0.0;
    int i;
    for (i = 0; i < n; i++) {
        double y = v[i] - comp;
        double t = total + y;
        comp = (t - total) - y;
        total = t;
    }
    return total;
}

double sum_values_alt(const double *v, int n)
{
    int i;
    double comp = 0.0;
    double total = 0.0;
    for (i = 0; i < n; i++) {
        double y = v[i] - comp;
        double t = total + y;
        comp = (t - total) - y;
        total = t;
    }
    return total;
}

int find_max(const int *v, int n)
{
    int best = 0;
    int i;
    for (i = 1; i < n; i++) {
        if (v[i] > v[best])
            best = i;
    }
    return best;
}

void log_stats(const double *v, int n)
{
    double mean = sum_values(v, n) / n;
    printf("n=%d mean=%f\n", n, mean);
}

void swap_values(double *a, double *b)
{
    double tmp = *a;
    *a = *b;
    *b = tmp;
}
