"""Shadow-circuit quantum classifiers on local window features."""
