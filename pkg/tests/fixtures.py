"""Published normalised RMSE between run 1 and the cached run, per model.

Forty values: ten models times the tensors A, A_LM, A_P and G_LM. Group
"near" marks models trained near criticality; "sub" and "ablation" are the
sub-critical and loss-spike ablation models.
"""

NORMALIZED_RMSE_1C = {
    "PLDRv51-SOC-110M-1": ("near", {"A": 8.3069e-03, "A_LM": 6.8777e-04, "A_P": 9.5313e-04, "G_LM": 2.1867e-02}),
    "PLDRv51-SOC-110M-2": ("near", {"A": 4.3525e-06, "A_LM": 8.5975e-07, "A_P": 1.0032e-07, "G_LM": 1.2528e-05}),
    "PLDRv51-SOC-110M-3": ("near", {"A": 1.7730e-04, "A_LM": 8.1658e-07, "A_P": 3.2427e-06, "G_LM": 5.1342e-04}),
    "PLDRv51-SOC-110M-4": ("near", {"A": 1.3096e-06, "A_LM": 1.8719e-07, "A_P": 3.5953e-08, "G_LM": 9.2006e-06}),
    "PLDRv51-SOC-110M-5": ("near", {"A": 4.1660e-11, "A_LM": 1.2508e-12, "A_P": 0.0, "G_LM": 0.0}),
    "SUB-SOC-110M-1": ("sub", {"A": 3.0323e00, "A_LM": 3.6632e00, "A_P": 3.3531e-01, "G_LM": 1.5834e01}),
    "SUB-SOC-110M-2": ("sub", {"A": 1.4708e01, "A_LM": 7.7753e00, "A_P": 1.9771e00, "G_LM": 4.6945e01}),
    "ABL-SOC-110M-1": ("ablation", {"A": 1.0042e01, "A_LM": 1.4944e01, "A_P": 8.5672e00, "G_LM": 1.8421e02}),
    "ABL-SOC-110M-2": ("ablation", {"A": 5.0448e00, "A_LM": 3.2431e00, "A_P": 1.0874e00, "G_LM": 4.4422e01}),
    "ABL-SOC-110M-3": ("ablation", {"A": 3.7942e03, "A_LM": 7.7942e00, "A_P": 6.7517e-01, "G_LM": 1.8211e01}),
}
