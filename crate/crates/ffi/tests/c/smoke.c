#include <stdio.h>
#include "slf_lab.h"

int main(void) {
    uint64_t m = 0;
    if (slf_link_index(2, 3, 4, &m) != SLF_STATUS_OK || m != 3) return 1;
    if (slf_link_index(2, 2, 4, &m) != SLF_STATUS_INPUT_ERROR) return 2;
    if (slf_last_error_message() == NULL) return 3;

    SlfLearnerConfig cfg;
    if (slf_learner_config_default(&cfg) != SLF_STATUS_OK) return 4;
    cfg.px = 4;
    cfg.py = 4;
    SlfLearner *h = NULL;
    if (slf_learner_new(&cfg, &h) != SLF_STATUS_OK) return 5;
    size_t i[2] = {1, 5};
    size_t j[2] = {16, 8};
    double s[2] = {0.7, 0.3};
    if (slf_learner_step(h, i, j, s, 2) != SLF_STATUS_OK) return 6;
    double f[16];
    if (slf_learner_field(h, f, 16) != SLF_STATUS_OK) return 7;
    slf_learner_free(h);
    printf("ok\n");
    return 0;
}
