/* Loads a table and a checkpoint through the C ABI and prints one summary line. */
#include <stdio.h>
#include <stdlib.h>

#include "sourcetrace.h"

static int fail(const char *what, StStatus s) {
    char msg[256];
    st_last_error(msg, sizeof msg);
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, msg);
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: smoke TABLE CHECKPOINT\n");
        return 2;
    }
    StTable *table = NULL;
    StModel *model = NULL;
    StStatus s = st_table_load(argv[1], &table);
    if (s != ST_STATUS_OK) return fail("st_table_load", s);
    s = st_model_load(argv[2], &model);
    if (s != ST_STATUS_OK) return fail("st_model_load", s);

    size_t n = st_table_len(table), d = st_table_dim(table), c = st_model_n_classes(model);
    float *probs = malloc(n * c * sizeof *probs);
    s = st_model_predict_proba(model, st_table_vectors(table), n, d, NULL, 0, probs, n * c);
    if (s != ST_STATUS_OK) return fail("st_model_predict_proba", s);

    const uint16_t *labels = st_table_labels(table);
    size_t hits = 0;
    double total = 0.0;
    for (size_t i = 0; i < n; i++) {
        size_t best = 0;
        for (size_t j = 0; j < c; j++) {
            total += probs[i * c + j];
            if (probs[i * c + j] > probs[i * c + best]) best = j;
        }
        hits += best == labels[i];
    }
    char name[8];
    size_t needed = 0;
    st_table_class_name(table, 0, name, sizeof name, &needed);
    printf("n=%zu classes=%zu hits=%zu mass=%.3f first=%s version=%s\n", n, c, hits, total, name, st_version());

    free(probs);
    st_model_free(model);
    st_table_free(table);
    return 0;
}
