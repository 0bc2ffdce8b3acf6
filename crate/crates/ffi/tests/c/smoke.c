#include <stdio.h>
#include <string.h>

#include "rfdm.h"

int main(void) {
    double alpha = 0, sigma = 0, gamma = 0;
    if (rfdm_schedule_eval(0.5, &alpha, &sigma, NULL) != RFDM_STATUS_OK) return 1;
    if (rfdm_schedule_gamma(0.5, &gamma) != RFDM_STATUS_OK) return 2;

    float data[2 * 4 * 4 * 3];
    for (size_t i = 0; i < sizeof data / sizeof *data; i++) data[i] = (float)(i % 7) / 7.0f;
    RfdmClip *clip = NULL;
    if (rfdm_clip_new(2, 4, 4, 3, data, &clip) != RFDM_STATUS_OK) return 3;
    size_t frames = 0;
    rfdm_clip_dims(clip, &frames, NULL, NULL, NULL);
    double d = -1;
    if (rfdm_metric_vidreamsim(clip, clip, &d) != RFDM_STATUS_OK || d != 0.0) return 4;
    if (memcmp(rfdm_clip_data(clip), data, sizeof data) != 0) return 5;
    rfdm_clip_free(clip);

    RfdmModel *model = NULL;
    if (rfdm_model_load("/nonexistent.ckpt", &model) != RFDM_STATUS_IO) return 6;
    if (rfdm_last_error() == NULL) return 7;

    printf("alpha=%.6f sigma=%.6f gamma=%.6f frames=%zu version=%s\n", alpha, sigma, gamma, frames, rfdm_version());
    return 0;
}
